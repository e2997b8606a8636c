# Landmarking pipelines
