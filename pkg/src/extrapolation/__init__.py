"""k-NN score extrapolation to unscored samples"""
