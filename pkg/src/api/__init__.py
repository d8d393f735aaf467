# API module initialization
