import numpy as np
import pytest
from hypothesis import given, strategies as st

from structleak.errors import ContractError, NumericError, ParseError
from structleak.kernel import (Adjacency, OptimizerState, ParamSet, adamw_step, gnn_layer, grad_check, init_gin,
                               init_sage, mean_pool, nll, softmax_cross_entropy)
from structleak.kernel import tensor as T

from conftest import random_graph


def away_from_zero(rng, shape):
    return rng.choice([-1.0, 1.0], size=shape) * (0.2 + rng.random(shape))


def probe(build, shapes, seed=0, positive=()):
    """grad_check of sum(R * build(*tensors)) over freshly drawn inputs."""
    rng = np.random.default_rng(seed)
    ps = ParamSet()
    for i, s in enumerate(shapes):
        v = rng.random(s) + 0.5 if i in positive else away_from_zero(rng, s)
        ps.add(f"x{i}", v)
    out = build(*[ps[f"x{i}"] for i in range(len(shapes))])
    weights = rng.normal(size=out.shape)
    return grad_check(lambda: T.total(build(*[ps[f"x{i}"] for i in range(len(shapes))]) * weights), ps)


IDX = np.array([0, 2, 2, 1, 3])
CSR = (np.array([0, 2, 3, 5, 6]), np.array([1, 2, 0, 0, 3, 2]))

OPS = {
    "add": (lambda a, b: a + b, [(4, 3), (3,)], ()),
    "sub": (lambda a, b: a - b, [(4, 3), (4, 1)], ()),
    "mul": (lambda a, b: a * b, [(4, 3), (1, 3)], ()),
    "div": (lambda a, b: a / b, [(4, 3), (4, 3)], (1,)),
    "matmul": (lambda a, b: a @ b, [(4, 3), (3, 2)], ()),
    "affine": (lambda h, w, b: T.affine(h, w, b), [(4, 3), (3, 2), (2,)], ()),
    "affine_relu": (lambda h, w, b: T.affine(h, w, b, relu=True), [(6, 3), (3, 5), (5,)], ()),
    "relu": (T.relu, [(5, 2)], ()),
    "sigmoid": (T.sigmoid, [(5, 2)], ()),
    "log": (T.log, [(5, 2)], (0,)),
    "exp": (T.exp, [(5, 2)], ()),
    "abs": (T.absolute, [(5, 2)], ()),
    "clip": (lambda a: T.clip(a, -0.7, 0.9), [(6, 3)], ()),
    "sum_axis": (lambda a: T.total(a, axis=1), [(4, 3)], ()),
    "mean": (lambda a: T.mean(a, axis=0), [(4, 3)], ()),
    "reshape": (lambda a: T.reshape(a, (3, 4)), [(4, 3)], ()),
    "concat": (lambda a, b: T.concat([a, b]), [(4, 3), (4, 2)], ()),
    "take": (lambda a: T.take(a, IDX), [(4, 3)], ()),
    "take_1d": (lambda a: T.take(a, IDX), [(4,)], ()),
    "pick": (lambda a: T.pick(a, [0, 1, 3, 3], [2, 0, 1, 1]), [(4, 3)], ()),
    "propagate": (lambda h, w: T.propagate(*CSR, h, w), [(4, 3), (6,)], ()),
    "propagate_1d": (lambda h, w: T.propagate(*CSR, h, w), [(4,), (6,)], ()),
    "log_softmax": (T.log_softmax, [(4, 3)], ()),
    "softmax": (T.softmax, [(4, 3)], ()),
    "log_mix": (lambda a, b: T.log_mix(T.log_softmax(a), T.log_softmax(b), np.array([[0.3], [0.0], [1.0], [0.6]]),
                                       np.array([[0.7], [1.0], [0.0], [0.4]])), [(4, 3), (4, 3)], ()),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name):
    build, shapes, positive = OPS[name]
    assert probe(build, shapes, positive=positive) < 1e-6


def test_grad_check_quadratic():
    ps = ParamSet()
    ps.add("p", np.random.default_rng(0).uniform(0.5, 1.5, size=8))
    assert grad_check(lambda: T.total(ps["p"] * ps["p"]), ps, h=1e-5) < 1e-9


def test_shared_subexpression_accumulates():
    x = T.Tensor(np.array([1.5, -2.0]), requires_grad=True)
    y = x * x
    T.total(y + y * x).backward()
    assert np.allclose(x.grad, 2 * x.value + 3 * x.value ** 2)


def test_non_finite_guards():
    with pytest.raises(NumericError):
        T.log(T.Tensor([0.0, 1.0]))
    with pytest.raises(NumericError), np.errstate(over="ignore"):
        T.exp(T.Tensor([1000.0]))
    with pytest.raises(NumericError):
        nll(T.Tensor([[np.inf, 0.0]]), [0], [True])
    with pytest.raises(ContractError):
        T.Tensor([1.0, 2.0], requires_grad=True).backward()


def dense_gin(h, a, params, prefix):
    z = h + a @ h
    w0, b0 = params[prefix + ".mlp0.W"].value, params[prefix + ".mlp0.b"].value
    w1, b1 = params[prefix + ".mlp1.W"].value, params[prefix + ".mlp1.b"].value
    return np.maximum(np.maximum(z @ w0 + b0, 0) @ w1 + b1, 0)


def dense_sage(h, a, params, prefix):
    deg = a.sum(axis=1, keepdims=True)
    nb = np.where(deg > 0, (a @ h) / np.where(deg > 0, deg, 1), 0.0)
    w, b = params[prefix + ".W"].value, params[prefix + ".b"].value
    return np.maximum(np.concatenate([h, nb], axis=1) @ w + b, 0)


def randomize(ps, seed):
    rng = np.random.default_rng(seed)
    for name, t in ps.items():
        if name.endswith(".b"):
            t.value = rng.normal(scale=0.3, size=t.shape)


@pytest.mark.parametrize("kind", ["gin", "sage-mean"])
@pytest.mark.parametrize("weighted", [False, True])
def test_gnn_layer_dense_oracle(kind, weighted):
    g = random_graph(8, 0.4, 1, feature_dim=3)
    ps = ParamSet(0)
    (init_gin if kind == "gin" else init_sage)(ps, "l", 3, 5)
    randomize(ps, 1)
    w = np.random.default_rng(2).random(g.m) if weighted else None
    out = gnn_layer(kind, g.features, Adjacency.of(g, w), ps, "l").value
    a = g.adjacency(w).toarray()
    oracle = (dense_gin if kind == "gin" else dense_sage)(g.features, a, ps, "l")
    assert np.allclose(out, oracle, atol=1e-12)


def test_gin_trivial_examples():
    ps = ParamSet()
    ps.add("l.mlp0.W", np.eye(2))
    ps.add("l.mlp0.b", np.zeros(2))
    ps.add("l.mlp1.W", np.eye(2))
    ps.add("l.mlp1.b", np.zeros(2))
    x = np.array([[1.0, -2.0], [-0.5, 3.0], [0.0, 1.0]])
    edgeless = Adjacency(np.zeros(4, dtype=np.int64), np.zeros(0, dtype=np.int64))
    assert np.array_equal(gnn_layer("gin", x, edgeless, ps, "l").value, np.maximum(x, 0))
    k2 = Adjacency(np.array([0, 1, 2]), np.array([1, 0]))
    assert np.array_equal(gnn_layer("gin", np.ones((2, 2)), k2, ps, "l").value, 2 * np.ones((2, 2)))
    with pytest.raises(ContractError):
        gnn_layer("gat", x, edgeless, ps, "l")


@given(st.integers(0, 1000))
def test_gnn_permutation_equivariance(seed):
    g = random_graph(9, 0.4, seed, feature_dim=2)
    ps = ParamSet(seed)
    init_gin(ps, "a", 2, 4)
    init_sage(ps, "b", 2, 4)
    perm = np.random.default_rng(seed).permutation(9)
    inv = np.argsort(perm)
    gp = random_graph(9, 0, 0).from_edges(9, inv[g.edges], g.features[perm])
    for kind, prefix in (("gin", "a"), ("sage-mean", "b")):
        out = gnn_layer(kind, g.features, Adjacency.of(g), ps, prefix).value
        outp = gnn_layer(kind, gp.features, Adjacency.of(gp), ps, prefix).value
        assert np.allclose(out[perm], outp, atol=1e-12)


def test_gnn_composition_gradients():
    g = random_graph(10, 0.35, 4, feature_dim=3)
    ps = ParamSet(3)
    init_gin(ps, "g0", 3, 6)
    init_gin(ps, "g1", 6, 6)
    init_sage(ps, "s", 6, 4)
    ps.linear("head", 4, 3)
    randomize(ps, 5)
    w = T.Tensor(np.random.default_rng(1).random(g.m), requires_grad=True)
    ps.tensors["w"] = w
    y = np.arange(10) % 3

    def loss():
        adj = Adjacency.of(g, ps["w"])
        h = gnn_layer("gin", g.features, adj, ps, "g0")
        h = gnn_layer("gin", h, adj, ps, "g1")
        h = gnn_layer("sage-mean", h, adj, ps, "s")
        return softmax_cross_entropy(T.affine(h, ps["head.W"], ps["head.b"]), y, np.arange(10) < 7)

    assert grad_check(loss, ps) < 1e-4


def test_mean_pool():
    assert np.array_equal(mean_pool(np.array([[1.0, 2.0]]), [0]).value, [1.0, 2.0])
    assert np.array_equal(mean_pool(np.array([[1.0, 0.0], [0.0, 1.0]]), [0, 1]).value, [0.5, 0.5])
    x = np.random.default_rng(0).normal(size=(10, 4))
    idx = [7, 1, 3, 3]
    oracle = [sum(x[i, j] for i in idx) / len(idx) for j in range(4)]
    assert np.allclose(mean_pool(x, idx).value, oracle)
    assert np.allclose(mean_pool(x, idx[::-1]).value, oracle)
    with pytest.raises(ContractError):
        mean_pool(x, [])


def test_cross_entropy():
    assert softmax_cross_entropy(T.Tensor(np.zeros((3, 4))), [0, 1, 2], [True] * 3).item() == \
        pytest.approx(np.log(4))
    big = np.full((2, 3), 0.0)
    big[[0, 1], [2, 1]] = 60.0
    assert softmax_cross_entropy(T.Tensor(big), [2, 1], [True, True]).item() < 1e-20
    rng = np.random.default_rng(0)
    z = rng.normal(size=(5, 3))
    y = rng.integers(0, 3, 5)
    mask = np.array([True, False, True, True, False])
    oracle = -np.mean([z[i, y[i]] - np.log(sum(np.exp(z[i, c]) for c in range(3))) for i in range(5) if mask[i]])
    assert softmax_cross_entropy(T.Tensor(z), y, mask).item() == pytest.approx(oracle, abs=1e-12)
    with pytest.raises(ContractError):
        softmax_cross_entropy(T.Tensor(z), y, np.zeros(5, bool))


def test_adamw_examples():
    ps = ParamSet()
    ps.add("p", np.array([1.0, -2.0]))
    st_ = OptimizerState(lr=0.1, weight_decay=0.5)
    adamw_step(ps, {"p": np.zeros(2)}, st_)
    assert np.allclose(ps["p"].value, [0.95, -1.9])

    ps = ParamSet()
    ps.add("p", np.zeros(3))
    st_ = OptimizerState(lr=0.01, weight_decay=0.0)
    adamw_step(ps, {"p": np.array([3.0, -0.2, 1e-3])}, st_)
    assert np.allclose(ps["p"].value, -0.01 * np.sign([3.0, -0.2, 1e-3]), rtol=1e-4)

    # constant gradient: closed-form trajectory m_t/(1-b1^t) = g, v_t/(1-b2^t) = g^2
    ps = ParamSet()
    ps.add("p", np.zeros(1))
    st_ = OptimizerState(lr=0.01, weight_decay=0.0)
    for _ in range(200):
        before = ps["p"].value.copy()
        adamw_step(ps, {"p": np.array([0.37])}, st_)
    assert abs(before - ps["p"].value)[0] == pytest.approx(0.01, rel=1e-6)
    assert ps["p"].value[0] == pytest.approx(-2.0, rel=1e-6)


def test_adamw_contract_and_determinism():
    def run():
        ps = ParamSet(11)
        ps.linear("l", 4, 3)
        st_ = OptimizerState()
        x = np.random.default_rng(0).normal(size=(6, 4))
        for _ in range(5):
            ps.zero_grad()
            T.total(T.affine(x, ps["l.W"], ps["l.b"], relu=True)).backward()
            adamw_step(ps, ps.grads(), st_)
        return ps.to_json()

    assert run() == run()
    ps = ParamSet()
    ps.add("p", np.zeros(2))
    with pytest.raises(ContractError):
        adamw_step(ps, {"q": np.zeros(2)}, OptimizerState())
    with pytest.raises(ContractError):
        adamw_step(ps, {"p": np.zeros(3)}, OptimizerState())


def test_paramset_round_trip():
    ps = ParamSet(5)
    init_gin(ps, "a", 3, 4)
    ps.linear("h", 4, 2, zero=True)
    back = ParamSet.from_json(ps.to_json())
    assert list(back) == list(ps)
    assert all(np.array_equal(back[k].value, ps[k].value) for k in ps)
    assert np.all(ps["h.W"].value == 0)
    a = np.sqrt(6 / 7)
    assert np.abs(ps["a.mlp0.W"].value).max() <= a
    d = ps.to_dict()
    d["format_version"] = 99
    with pytest.raises(ParseError):
        ParamSet.from_dict(d)
    with pytest.raises(ContractError):
        ps.add("h.W", np.zeros(1))
    with pytest.raises(ContractError):
        ps.load_values({"a": np.zeros(1)})
