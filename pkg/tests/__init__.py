# This file can be empty or can be used to initialize the tests package.
