# Results app
