# Family package
