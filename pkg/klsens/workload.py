import numba
import numpy as np


@numba.jit(nopython=True, cache=True)
def multi_server_wait(services: np.ndarray, gaps: np.ndarray, servers: int) -> float:
    """
    Waiting time of the last customer in a FIFO queue with ``servers``
    servers, started empty, by the Kiefer-Wolfowitz recursion. ``gaps[i]`` is
    the time between the arrivals of customers i and i + 1.

    The workload vector stays sorted: after each arrival the other entries
    only shrink by the same gap, so the new entry is inserted in O(servers).
    """
    w = np.zeros(servers)
    for i in range(services.shape[0] - 1):
        a = gaps[i]
        v = max(w[0] + services[i] - a, 0.0)
        j = 1
        while j < servers:
            c = max(w[j] - a, 0.0)
            if c >= v:
                break
            w[j - 1] = c
            j += 1
        w[j - 1] = v
        while j < servers:
            w[j] = max(w[j] - a, 0.0)
            j += 1
    return w[0]


@numba.jit(nopython=True, cache=True)
def lindley_wait(services: np.ndarray, gaps: np.ndarray) -> float:
    """Single-server waiting time of the last customer."""
    w = 0.0
    for i in range(services.shape[0] - 1):
        w = max(w + services[i] - gaps[i], 0.0)
    return w


@numba.jit(nopython=True, cache=True)
def batch_waits(services: np.ndarray, gaps: np.ndarray, servers: int) -> np.ndarray:
    out = np.empty(services.shape[0])
    for k in range(services.shape[0]):
        out[k] = multi_server_wait(services[k], gaps[k], servers)
    return out


@numba.jit(nopython=True, cache=True)
def service_swap_sum(services: np.ndarray, gaps: np.ndarray, servers: int) -> float:
    """Sum over t of the wait with service times 1 and t swapped."""
    total = multi_server_wait(services, gaps, servers)
    swapped = services.copy()
    for t in range(1, services.shape[0]):
        swapped[0], swapped[t] = services[t], services[0]
        total += multi_server_wait(swapped, gaps, servers)
        swapped[0], swapped[t] = services[0], services[t]
    return total


@numba.jit(nopython=True, cache=True)
def gap_swap_sum(gaps: np.ndarray, services: np.ndarray, servers: int) -> float:
    """Sum over t of the wait with interarrival gaps 1 and t swapped."""
    total = multi_server_wait(services, gaps, servers)
    swapped = gaps.copy()
    for t in range(1, gaps.shape[0]):
        swapped[0], swapped[t] = gaps[t], gaps[0]
        total += multi_server_wait(services, swapped, servers)
        swapped[0], swapped[t] = gaps[0], gaps[t]
    return total
