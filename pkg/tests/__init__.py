# Tests for stainrecon
