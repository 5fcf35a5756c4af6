# Test suite root
