"""Command-line experiments: reduction tables, convergence, blow-up and norm watches."""
