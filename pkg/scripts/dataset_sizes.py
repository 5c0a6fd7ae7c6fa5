"""Print theoretical window counts per preprocessing configuration, for the reported
contact count and for the default synthetic training set."""

from contact_sense import synthetic
from contact_sense.preprocessing import WindowMode, build_dataset, sweep_grid, theoretical_size
from contact_sense.types import contact_onsets


def main():
    train = synthetic.generate(synthetic.train_config(0))
    contacts = sum(len(contact_onsets(r)[:3]) for r in train)
    print(f"{'configuration':<22}{'per 255':>10}{'synthetic':>12}{'built':>8}")
    for params in sweep_grid():
        built = len(build_dataset(train, params))
        print(f"{params.label():<22}{theoretical_size(255, params):>10}"
              f"{theoretical_size(contacts, params):>12}{built:>8}")


if __name__ == "__main__":
    main()
