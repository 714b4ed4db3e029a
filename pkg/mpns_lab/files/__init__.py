"""
On-disk formats: datasets, checkpoints and result CSVs.
"""
