"""Hypothesis strategies shared by the test modules."""

from hypothesis import strategies as st

from decompart.model import make_model

coef = st.floats(0.01, 2.0)


@st.composite
def random_models(draw):
    n = draw(st.integers(1, 4))
    flows = {}
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            if i != j and draw(st.booleans()):
                if draw(st.booleans()):
                    flows[(i, j)] = f"{draw(coef)}*x{j}"
                else:
                    flows[(i, j)] = f"{draw(coef)}*x{j}*x{draw(st.integers(1, n))}/(1 + x{j})"
    inputs = [str(draw(coef)) if draw(st.booleans()) else "0" for _ in range(n)]
    outputs = [f"{draw(coef)}*x{j}" if draw(st.booleans()) else "0" for j in range(1, n + 1)]
    x0 = [draw(st.floats(0.1, 10.0)) for _ in range(n)]
    return make_model([f"c{i}" for i in range(n)], flows, inputs, outputs, x0)
