# Shifted-Gaussian Kolmogorov solver
