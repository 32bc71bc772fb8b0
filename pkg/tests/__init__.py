# Tests for the recursive MDP toolkit
