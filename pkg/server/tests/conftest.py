import os
import sys

# run the suite against the source tree without requiring an install
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), os.pardir, "src")))
