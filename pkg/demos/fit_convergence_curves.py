"""Fit convergence curves to noisy loss series and forecast ahead.

Generates one job per curve family, adds measurement noise, fits both
families, and compares the selected model's 10-iterations-ahead forecast
with the hidden truth.
"""

import numpy as np

from qsched import (
    Family,
    FitConfig,
    LossHistory,
    LossRecord,
    backtest_error,
    predict_loss_at,
    select_model,
)


def make_history(losses):
    history = LossHistory()
    for k, loss in enumerate(losses):
        history.append(LossRecord(k, float(k), float(loss)))
    return history


def main():
    rng = np.random.default_rng(7)
    ks = np.arange(30)

    # hidden ground truth, the way a training job would produce it
    curves = {
        "gradient-descent-like": (Family.SUBLINEAR,
                                  1.0 / (0.01 * ks * ks + 0.9 * ks + 1.1) + 0.25),
        "quasi-newton-like": (Family.EXPONENTIAL, 0.82 ** (ks - 1.5) + 0.3),
    }

    cfg = FitConfig()
    for name, (family, truth) in curves.items():
        span = truth.max() - truth.min()
        observed = truth + rng.normal(0.0, 0.003 * span, truth.size)
        history = make_history(observed)

        model = select_model(history, cfg)
        print(f"{name}:")
        print(f"  selected family      {model.family.value}")
        print(f"  fitted parameters    {model.params}")
        print(f"  weighted rms resid   {model.weighted_rms_residual:.2e}")

        k_future = len(ks) - 1 + 10
        forecast = predict_loss_at(model, float(k_future))
        # evaluate the hidden truth at the forecast point
        if name.startswith("gradient"):
            actual = 1.0 / (0.01 * k_future ** 2 + 0.9 * k_future + 1.1) + 0.25
        else:
            actual = 0.82 ** (k_future - 1.5) + 0.3
        print(f"  loss at k={k_future}: forecast {forecast:.5f}, truth {actual:.5f} "
              f"({abs(forecast - actual) / actual:.2%} off)")

        # backtest with the family known, the way a scheduler that reads the
        # job's optimizer class would
        err = backtest_error(history, cfg, horizon=10, family=family)
        print(f"  rolling backtest, 10 iterations ahead: {err:.2%} mean error")
        print()


if __name__ == "__main__":
    main()
