"""Error-correction simulator for unresolvable spin ensembles."""
