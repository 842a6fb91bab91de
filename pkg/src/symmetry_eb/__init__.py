"""Empirical Bayes denoising under probabilistic-symmetry priors."""
