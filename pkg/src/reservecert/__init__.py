"""Conservative offline screening of reserve-price policies from logged auctions."""

__version__ = "0.1.0"
