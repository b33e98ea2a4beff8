from typing import Any, List, Optional, Tuple

import duckdb
import numpy as np
import pandas as pd
from loguru import logger

from .exceptions import CountingError
from .query_utils import (
    build_dropped_pairs_sql,
    build_occupancy_sql,
    build_pair_count_sql,
)
from .settings import default_threads


class TransitionCounter:
    """
    Integer aggregation of box visits and box-to-box transitions.

    Counts are computed by an in-memory duckdb connection; the thread cap
    changes speed only, since integer sums merge in any order.
    """

    def __init__(self, threads: Optional[int] = None):
        try:
            self.conn = duckdb.connect(":memory:")
            threads = threads if threads is not None else default_threads()
            if threads is not None:
                self.execute(f"SET threads TO {int(threads)}")
        except duckdb.Error as e:
            raise CountingError(f"Failed to open counting connection: {e}")

    def __enter__(self) -> "TransitionCounter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def execute(
        self, query: str, parameters: Optional[List[Any]] = None
    ) -> duckdb.DuckDBPyConnection:
        return self.conn.execute(query, parameters)

    def count_pairs(self, src: np.ndarray, dst: np.ndarray) -> Tuple[pd.DataFrame, int]:
        """
        Count transitions between boxes.

        :param src: box index of Y_n for every pair (-1 outside the domain)
        :param dst: box index of Y_{n+l} for every pair (-1 outside the domain)
        :return: frame with columns src, dst, count and the number of dropped pairs
        :raises CountingError: If the aggregation fails
        """
        pairs = pd.DataFrame(
            {"src": np.asarray(src, dtype=np.int64), "dst": np.asarray(dst, dtype=np.int64)}
        )
        try:
            self.conn.register("pairs", pairs)
            counts = self.execute(build_pair_count_sql("pairs")).fetchdf()
            dropped = self.execute(build_dropped_pairs_sql("pairs")).fetchone()[0]
            self.conn.unregister("pairs")
        except duckdb.Error as e:
            logger.error(f"Error counting transitions: {e}")
            raise CountingError(f"Error counting transitions: {e}")
        counts = counts.astype({"src": np.int64, "dst": np.int64, "count": np.int64})
        logger.info(
            f"Counted {len(pairs) - int(dropped)} in-domain pairs over {len(counts)} box pairs"
        )
        return counts, int(dropped)

    def count_occupancy(self, boxes: np.ndarray) -> pd.DataFrame:
        visits = pd.DataFrame({"box": np.asarray(boxes, dtype=np.int64)})
        try:
            self.conn.register("visits", visits)
            counts = self.execute(build_occupancy_sql("visits")).fetchdf()
            self.conn.unregister("visits")
        except duckdb.Error as e:
            logger.error(f"Error counting box visits: {e}")
            raise CountingError(f"Error counting box visits: {e}")
        return counts.astype({"box": np.int64, "count": np.int64})

    def close(self):
        try:
            self.conn.close()
        except duckdb.Error as e:
            logger.error(f"Error closing counting connection: {e}")
