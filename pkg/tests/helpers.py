import numpy as np

from reservecert.auction_log import Panel


def make_panel(floor, bid, payment, filled, day=None, **keys):
    n = len(floor)
    if day is None:
        day = [f"d{i % 2}" for i in range(n)]
    return Panel.from_columns(day=day, floor=np.asarray(floor), bid=np.asarray(bid),
                              payment=np.asarray(payment), filled=np.asarray(filled, dtype=bool),
                              **keys)
