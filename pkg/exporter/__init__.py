# Exporter package
