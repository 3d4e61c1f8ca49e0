"""Joint UAV-USV inspection planning with integrated sensing and communication."""
