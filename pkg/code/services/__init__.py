"""Services package: optimizers, training, profiling, synthetic data and the TPF1 container"""
