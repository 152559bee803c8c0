"""
Numeric core of NetResil: reverse-mode autodiff tensors, graph operators
and shared error / random-stream helpers.
"""
