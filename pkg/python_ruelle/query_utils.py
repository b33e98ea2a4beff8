def build_pair_count_sql(table: str) -> str:
    """Count (source, destination) box pairs, both endpoints inside the domain"""
    return f"""
        SELECT src, dst, COUNT(*) AS count
        FROM {table}
        WHERE src >= 0 AND dst >= 0
        GROUP BY src, dst
        ORDER BY src, dst
    """


def build_occupancy_sql(table: str) -> str:
    """Count visits per box, ignoring samples outside the domain"""
    return f"""
        SELECT box, COUNT(*) AS count
        FROM {table}
        WHERE box >= 0
        GROUP BY box
        ORDER BY box
    """


def build_dropped_pairs_sql(table: str) -> str:
    """Count pairs with at least one endpoint outside the domain"""
    return f"SELECT COUNT(*) FROM {table} WHERE src < 0 OR dst < 0"
