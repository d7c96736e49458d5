"""
Comparison methods: KNN imputation, Kalman fusion and PCA denoising.
"""
