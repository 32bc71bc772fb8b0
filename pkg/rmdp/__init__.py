# Recursive MDP toolkit: models, exact solvers and recursive Q-learning
