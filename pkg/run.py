"""
Run script for the ionhom command line

Same as `python -m ionhom`; kept for running from a checkout without installing.
"""
from dotenv import load_dotenv

from ionhom.main import main

# Load environment variables
load_dotenv()

if __name__ == "__main__":
    main()
