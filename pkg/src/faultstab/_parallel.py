from concurrent.futures import ProcessPoolExecutor


def parallel_map(fn, items, workers: int = 1, chunksize: int = 16):
    """Ordered map; results do not depend on ``workers``."""
    items = list(items)
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunksize))
