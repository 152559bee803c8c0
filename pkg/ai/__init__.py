"""
Learning side of NetResil: physics residual, state and topology
predictors, joint model and trainer.
"""
