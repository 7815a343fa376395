"""One module per claim; each exposes SCENARIO_NAME and evaluate(sweep)."""
