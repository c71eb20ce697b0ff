"""Heat flow and optimal transport on Finsler structures."""
