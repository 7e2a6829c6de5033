# Direct image package
