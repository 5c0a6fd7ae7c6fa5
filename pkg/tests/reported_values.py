"""Reported figures used as fixed expectations in the tests."""

CONTACTS = 255

# dataset sizes after cleaning: fixed windows by offset, sliding windows by (step, offset)
FIXED_SIZES = {25: 253, 50: 253, 75: 254, 100: 254}
SLIDING_SIZES = {
    (1, 5): 15093, (1, 15): 14587, (1, 25): 14081, (1, 50): 12816, (1, 75): 11597, (1, 100): 10327,
    (4, 5): 3774, (4, 15): 3773, (4, 25): 3521, (4, 50): 3268, (4, 75): 3026, (4, 100): 2771,
}

# class-wise metrics of the best model, in (Aluminum, PVC, Human) order, percent
TABLE_PRECISION = (84.85, 96.00, 93.75)
TABLE_RECALL = (93.33, 80.00, 100.00)
TABLE_F1 = (88.89, 87.27, 96.77)
OVERALL_ACCURACY = 91.11
# confusion matrix consistent with those figures at 30 contacts per class, rows true, same order
CONFUSION_AL_PVC_HUMAN = [[28, 1, 1], [5, 24, 1], [0, 0, 30]]

LATENCY_MIN_MS = 127.09
LATENCY_MAX_MS = 232.09
MODEL_RUNTIME_MS = 7.09

BEST_ROWS = {
    "gru": (88.70, 50, 4, "hard", 15, 3268),
    "lstm": (92.17, 5, 4, "hard", 8, 3774),
    "transformer": (93.04, 15, 1, "hard", 15, 14587),
}
