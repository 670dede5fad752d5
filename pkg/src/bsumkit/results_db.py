import logging

# Set a basic logging level
logging.basicConfig(level=logging.INFO)

# Logging for this package
logger = logging.getLogger(__name__)
# Set logging level for this package
logger.setLevel(logging.DEBUG)

import os
import sqlite3

from pandas import DataFrame, read_sql
from sqlite_utils import Database

from .db_table_schemas import SETUP_Q


class DatabaseManager:
    """SQLite store for run summaries, trace records and experiment checks."""

    def __init__(self, dbname, newdb=False, dbReadOnly=False):
        self.dbname = dbname
        self.conn = self.setup_db(newdb=newdb)
        self.dbReadOnly = dbReadOnly

    def setup_db(self, newdb=False):
        logger.info("Initialising the results database...")
        if os.path.isfile(self.dbname) and newdb:
            os.remove(self.dbname)

        if not os.path.isfile(self.dbname):
            newdb = True

        conn = sqlite3.connect(self.dbname, timeout=10)

        if newdb:
            self.initialize_db(conn)

        return conn

    def initialize_db(self, conn):
        logger.info("Creating new db tables...")
        c = conn.cursor()
        c.executescript(SETUP_Q)

    def read_sql(self, query):
        return read_sql(query, self.conn)

    def upsert(self, df, table, pk):
        """Upsert the frame's columns that the table knows, keyed on pk."""
        if self.dbReadOnly:
            logger.debug(f"Read-only database; skipping {table}")
            return
        cols = read_sql(f"PRAGMA table_info({table})", self.conn)["name"].tolist()
        df = df[[c for c in df.columns if c in cols]]
        logger.info(f"Upserting {len(df)} rows into {table}...")
        records = df.astype(object).where(df.notna(), None).to_dict(orient="records")
        Database(self.conn)[table].upsert_all(records, pk=pk)

    def save_run(self, run_id, trace, **meta):
        """Upsert one run summary and its trace records."""
        summary = DataFrame(
            [
                {
                    "run_id": run_id,
                    "terminal_status": trace.terminal_status,
                    "iterations": len(trace),
                    "initial_f": trace.initial_f,
                    "final_f": trace.final_f,
                    "notes": "; ".join(trace.notes),
                    **meta,
                }
            ]
        )
        self.upsert(summary, "runs", pk="run_id")
        records = trace.to_frame()
        if not records.empty:
            records.insert(0, "run_id", run_id)
            self.upsert(records, "trace_records", pk=("run_id", "r"))
        self.conn.commit()

    def save_checks(self, checks):
        df = checks.copy()
        df["pass"] = df["pass"].astype(int)
        self.upsert(df, "experiment_checks", pk=("scenario", "check"))
        self.conn.commit()
