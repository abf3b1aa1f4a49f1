# -*- coding: utf-8 -*-
# General purpose helper code


# Terminal progress bar for loops over a known number of items (SNR points of a sweep).
# Adapted from the forum posting cited below.
# @see https://stackoverflow.com/questions/3173320/text-progress-bar-in-the-console
def progressBar(iterable, prefix='', suffix='', decimals=1, length=60, fill='#', enabled=True):
    """
    Yield the items of iterable while drawing a progress bar
    @params:
        iterable    - Required  : sized iterable object (Iterable)
        prefix      - Optional  : prefix string (Str)
        suffix      - Optional  : suffix string, or callable item -> str evaluated after each item (Str)
        decimals    - Optional  : positive number of decimals in percent complete (Int)
        length      - Optional  : character length of bar (Int)
        fill        - Optional  : bar fill character (Str)
        enabled     - Optional  : when False the items are yielded silently (Bool)
    """
    items = list(iterable)
    if not enabled:
        yield from items
        return

    total = max(len(items), 1)

    def printProgressBar(done, label):
        percent = ("{0:." + str(decimals) + "f}").format(100 * (done / float(total)))
        filled = int(length * done // total)
        bar = fill * filled + '-' * (length - filled)
        print(f'\r{prefix} |{bar}| {percent}% {label}', end='\r')

    printProgressBar(0, '')
    for i, item in enumerate(items):
        yield item
        printProgressBar(i + 1, suffix(item) if callable(suffix) else suffix)
    print()


# Add operation counts to an OpCounter; does nothing when counter is None
def tally(counter, **ops):
    if counter is not None:
        counter.add(**ops)
