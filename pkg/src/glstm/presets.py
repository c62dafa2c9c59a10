"""Named experiment configurations (keyword overrides of TrainConfig)."""

_ADDING = dict(task="adding", hidden=110, optimizer="adam", lr=1e-3, gate_lr=1.0,
               sigma_init=40.0, epochs=700, train_samples=5000, test_samples=5000)
_SMNIST = dict(task="smnist", hidden=110, optimizer="rmsprop", lr=1e-3, rms_decay=0.5,
               gate_lr=1.0, mu_range=(1.0, 784.0), sigma_init=250.0, epochs=100,
               train_samples=60000, test_samples=10000)

PRESETS = {
    "adding-1000": dict(_ADDING, seq_len=1000, mu_range=(300.0, 700.0)),
    "adding-2000": dict(_ADDING, seq_len=2000, mu_range=(500.0, 1500.0)),
    "smnist": dict(_SMNIST),
    "pmnist": dict(_SMNIST, task="pmnist"),
    "curriculum": dict(_SMNIST, sigma_init=50.0,
                       curriculum=dict(alpha=1.0 / 6.0, rho=15.0, final_sigma=5000.0,
                                       final_epochs=10, gate_lr_zero=True)),
    # non-optimal gate initializations on the N=1000 adding task
    "appendix-A1": dict(_ADDING, seq_len=1000, mu_range=(300.0, 700.0), sigma_init=1.0),
    "appendix-A2": dict(_ADDING, seq_len=1000, mu_range=(0.0, 400.0), sigma_init=40.0),
    "appendix-A3": dict(_ADDING, seq_len=1000, mu_range=(600.0, 1000.0), sigma_init=40.0),
    "chrono-784": dict(_SMNIST, bias_init="chrono", chrono_tmax=784),
    "chrono-250": dict(_SMNIST, bias_init="chrono", chrono_tmax=250),
    "size-25": dict(_SMNIST, hidden=25),
    "size-110": dict(_SMNIST, hidden=110),
    "size-220": dict(_SMNIST, hidden=220),
    # scaled-down runs that fit on a desktop CPU
    "adding-desk": dict(_ADDING, seq_len=200, hidden=32, mu_range=(1.0, 200.0),
                        epochs=100, train_samples=2000, test_samples=1000),
    "adding-desk-extreme": dict(_ADDING, seq_len=200, hidden=32, mu_range=(90.0, 110.0),
                                sigma_init=8.0, epochs=150, train_samples=2000,
                                test_samples=1000),
}

for _lam in ("0.1", "1", "10"):
    PRESETS[f"smnist-budgeted-lambda{_lam}"] = dict(_SMNIST, sigma_init=50.0,
                                                   budget_lambda=float(_lam))


def preset(name):
    try:
        return dict(PRESETS[name])
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}") from None
