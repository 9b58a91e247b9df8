"""Shared test setup: pin thread env vars before numpy loads anywhere."""

import os

# Best effort only: if numpy was already imported by a plugin these are inert,
# which is fine for tests (timing-sensitive checks use generous bounds).
for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(var, os.environ.get("HSSDCT_THREADS", "4"))
