# Projective geometry package
