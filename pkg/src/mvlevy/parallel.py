"""Order-preserving process fan-out.

Results come back in submission order regardless of completion order, so
aggregates computed from them are independent of the worker count.
"""
from concurrent.futures import ProcessPoolExecutor


def ordered_map(fn, items, workers=1):
    items = list(items)
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
