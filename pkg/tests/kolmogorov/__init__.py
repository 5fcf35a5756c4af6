# Solver tests
