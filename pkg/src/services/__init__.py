# Services: calibration, table builds, benchmarks and the ledger
