import argparse
import logging
import time

from klsens.nestedmc import NestedDesign
from klsens.queueing import QUEUE_TABLE_COLUMNS, QueueConfig, benchmark_table, table_to_csv

logger = logging.getLogger("root")

SERVERS = "20,40,60,80,100"
OUTPUT_FILE = "queue_table_{table}.csv"

if __name__ == "__main__":
    parser = argparse.ArgumentParser(
        description="Waiting-time sensitivity tables for M/M/s and G/G/s queues (--table 1 and 2)"
    )
    parser.add_argument("--table", default=1, type=int, choices=[1, 2])
    parser.add_argument("--servers", default=SERVERS, type=str)
    parser.add_argument("--samples", default=10_000, type=int, help="Waiting-time samples per row.")
    parser.add_argument("--customers", default=100, type=int)
    parser.add_argument("--outer", default=30, type=int)
    parser.add_argument("--inner", default=10, type=int)
    parser.add_argument("--sections", default=20, type=int)
    parser.add_argument("--seed", default=0, type=int)
    parser.add_argument("--max_processes", default=1, type=int)
    parser.add_argument("--out_file", default=None, type=str)
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO)

    servers = [int(s) for s in args.servers.split(",")]
    if args.table == 1:
        configs = [QueueConfig.mms(s, customers=args.customers) for s in servers]
    else:
        configs = [QueueConfig.ggs(s, customers=args.customers) for s in servers]
    design = NestedDesign(K=args.outer, n=args.inner, N=args.sections)

    t = time.time()
    table = benchmark_table(configs, args.samples, design, args.seed, args.max_processes)
    logger.info(f"computed {len(table)} rows in {time.time() - t:.1f}s")

    impact = table.relative_impact.to_pylist()
    if any(b is None or a is None or b <= a for a, b in zip(impact, impact[1:])):
        logger.warning(f"relative impact is not increasing in the number of servers: {impact}")

    out_file = args.out_file or OUTPUT_FILE.format(table=args.table)
    table_to_csv(table, out_file, QUEUE_TABLE_COLUMNS)
    print(f"Wrote {len(table)} rows to {out_file}")
