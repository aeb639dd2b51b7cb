from concurrent.futures import ThreadPoolExecutor


def pmap(fn, items, jobs=1):
    """Ordered map over ``items`` using up to ``jobs`` threads."""
    items = list(items)
    if jobs is None or jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))
