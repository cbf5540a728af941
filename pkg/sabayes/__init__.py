# Bringing the main entry points to the front
from sabayes.model.posterior import sa_posterior, summarize, freq_selective_ci, unadjusted_posterior
from sabayes.model.risk import sabayes_risk, calibrate_rule, two_group
from sabayes.model.multiplicity import bh_procedure, fcr_adjusted_cis
from sabayes.model.microarray import fit_variance_prior, gene_posterior, gene_risk, ingest
