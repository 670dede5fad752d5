## RESULTS SCHEMA

SETUP_Q = """

CREATE TABLE "runs" (
  "run_id" TEXT PRIMARY KEY,
  "solver" TEXT,
  "problem" TEXT,
  "rule" TEXT,
  "surrogate" TEXT,
  "seed" INTEGER,
  "terminal_status" TEXT,
  "iterations" INTEGER,
  "initial_f" REAL,
  "final_f" REAL,
  "notes" TEXT,
  "config_path" TEXT
);

CREATE TABLE "trace_records" (
  "run_id" TEXT,
  "r" INTEGER,
  "blocks" TEXT,
  "f" REAL,
  "step_norm" REAL,
  "stat_gap" REAL,
  "feas_residual" REAL,
  "wall_ms" REAL,
  PRIMARY KEY ("run_id", "r"),
  FOREIGN KEY ("run_id") REFERENCES "runs" ("run_id")
);

CREATE TABLE "experiment_checks" (
  "scenario" TEXT,
  "check" TEXT,
  "value" REAL,
  "pass" INTEGER,
  "seed" INTEGER,
  PRIMARY KEY ("scenario", "check")
);

"""
