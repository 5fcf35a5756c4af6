# Importable root of the solver package
