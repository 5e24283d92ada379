import numpy as np
import pytest
from dataclasses import replace

from blockvit import vit
from blockvit.cipher import encrypt_image, encrypt_model
from blockvit.keygen import build_eb, generate_key, null_key
from blockvit.rng import SplitMix64
from blockvit.synthdata import make_dataset
from blockvit.vit import (classify, embed, encoder_forward,
                          head_loss_and_grad, init_random_model, load_model,
                          save_model, train_linear_head, verify_equivalence)

from conftest import random_plain_image


def small_model(seed=7, p=4, c=1, n=16, d=8, depth=2, heads=2, classes=3):
    return init_random_model(seed, p=p, c=c, n=n, d=d, depth=depth,
                             heads=heads, num_classes=classes)


def zeroed(model):
    zero_layers = tuple(
        replace(layer,
                wq=np.zeros_like(layer.wq), wk=np.zeros_like(layer.wk),
                wv=np.zeros_like(layer.wv), wo=np.zeros_like(layer.wo),
                mlp_w1=np.zeros_like(layer.mlp_w1),
                mlp_b1=np.zeros_like(layer.mlp_b1),
                mlp_w2=np.zeros_like(layer.mlp_w2),
                mlp_b2=np.zeros_like(layer.mlp_b2))
        for layer in model.encoder)
    return replace(model,
                   patch_embed=np.zeros_like(model.patch_embed),
                   pos_embed=np.zeros_like(model.pos_embed),
                   class_token=np.zeros_like(model.class_token),
                   encoder=zero_layers)


def test_embed_zero_model():
    model = zeroed(small_model())
    img = random_plain_image(0, 16, 16, 1)
    assert (embed(model, img) == 0).all()


def test_embed_identity_single_patch():
    # N=1, L==D, identity patch embedding: token 1 is the patch itself
    model = small_model(p=2, c=2, n=1, d=8, depth=0, heads=2)
    model = replace(model, patch_embed=np.eye(8))
    img = random_plain_image(1, 2, 2, 2)
    z0 = embed(model, img)
    expected = img.data.reshape(-1) + model.pos_embed[1]
    assert np.allclose(z0[1], expected, atol=0)
    assert np.allclose(z0[0], model.class_token + model.pos_embed[0], atol=0)


def test_embed_dim_mismatch():
    model = small_model()
    with pytest.raises(ValueError):
        embed(model, random_plain_image(0, 8, 8, 1))


def test_encoder_zero_weights_passthrough():
    model = zeroed(small_model())
    z = SplitMix64(2).normals((model.n + 1) * model.d).reshape(model.n + 1,
                                                              model.d)
    assert np.array_equal(encoder_forward(model, z), z)


def test_encoder_depth_zero_identity():
    model = small_model(depth=0)
    z = SplitMix64(3).normals((model.n + 1) * model.d).reshape(model.n + 1,
                                                               model.d)
    assert np.array_equal(encoder_forward(model, z), z)


def test_encoder_nonfinite_detection():
    model = small_model()
    bad = replace(model.encoder[0], mlp_b2=np.full(model.d, np.inf))
    broken = replace(model, encoder=(bad,) + model.encoder[1:])
    z = np.zeros((model.n + 1, model.d))
    with pytest.raises(FloatingPointError):
        encoder_forward(broken, z)


def test_encoder_permutation_equivariance():
    # any row-0-fixing permutation commutes with the encoder
    model = small_model(seed=11)
    z = SplitMix64(4).normals((model.n + 1) * model.d).reshape(model.n + 1,
                                                               model.d)
    perm = SplitMix64(5).shuffle(list(range(1, model.n + 1)))
    p_idx = np.array([0] + perm)
    out_perm = encoder_forward(model, z[p_idx])
    out_base = encoder_forward(model, z)[p_idx]
    scale = np.abs(out_base).max()
    assert np.abs(out_perm - out_base).max() < 1e-9 * scale


@pytest.mark.parametrize("p,c,d,n", [(2, 1, 8, 4), (4, 3, 16, 16),
                                     (2, 3, 16, 4), (4, 1, 8, 16)])
def test_token_equivalence_across_geometries(p, c, d, n):
    side = p * int(np.sqrt(n))
    max_rel = 0.0
    for trial in range(25):
        model = init_random_model(trial, p=p, c=c, n=n, d=d, depth=2,
                                  heads=2, num_classes=3)
        key = generate_key(10_000 + trial, p=p, c=c, n=n)
        img = random_plain_image(trial ^ 0x5EED, side, side, c)
        z0 = embed(model, img)
        z0t = embed(encrypt_model(model, key), encrypt_image(img, key))
        ref = build_eb(key.lt) @ z0
        max_rel = max(max_rel,
                      np.abs(z0t - ref).max() / max(np.abs(ref).max(), 1.0))
    assert max_rel < 1e-9


def test_classify_logit_invariance():
    model = small_model(seed=21)
    key = generate_key(22, p=4, c=1, n=16)
    img = random_plain_image(23, 16, 16, 1)
    lp = classify(model, img)
    le = classify(encrypt_model(model, key), encrypt_image(img, key))
    assert np.abs(lp - le).max() < 1e-8 * max(np.abs(lp).max(), 1.0)


def test_classify_plain_image_into_encrypted_model_differs():
    model = small_model(seed=31)
    key = generate_key(32, p=4, c=1, n=16)
    img = random_plain_image(33, 16, 16, 1)
    lp = classify(model, img)
    lw = classify(encrypt_model(model, key), img)
    assert np.abs(lp - lw).max() > 1e-3


def test_classify_zero_head():
    model = small_model()
    model = replace(model, head_w=np.zeros_like(model.head_w),
                    head_b=np.arange(3, dtype=float))
    img = random_plain_image(2, 16, 16, 1)
    assert np.array_equal(classify(model, img), np.arange(3, dtype=float))


def test_verify_equivalence_null_key_zero_error():
    model = small_model()
    report = verify_equivalence(model, null_key(4, 1, 16),
                                [random_plain_image(i, 16, 16, 1)
                                 for i in range(3)])
    assert report["max_z0_error"] == 0.0
    assert report["max_logit_error"] == 0.0
    assert report["passed"]


def test_verify_equivalence_pass_and_fault_injection():
    model = small_model(seed=41)
    key = generate_key(42, p=4, c=1, n=16)
    images = [random_plain_image(i, 16, 16, 1) for i in range(20)]
    assert verify_equivalence(model, key, images)["passed"]
    # fault injection: model encrypted with the transposed mixing matrix
    # while images use the true key; the cancellation breaks
    bad_key = replace(key, ea=key.ea.T.copy())
    tampered = encrypt_model(model, bad_key)
    assert not verify_equivalence(model, key, images,
                                  enc_model=tampered)["passed"]


def test_verify_equivalence_empty_set():
    with pytest.raises(ValueError):
        verify_equivalence(small_model(), generate_key(1, 4, 1, 16), [])


def test_init_model_determinism_and_shapes():
    m1 = small_model(seed=9)
    m2 = small_model(seed=9)
    m3 = small_model(seed=10)
    assert m1.patch_embed.tobytes() == m2.patch_embed.tobytes()
    assert not np.array_equal(m1.patch_embed, m3.patch_embed)
    assert m1.patch_embed.shape == (m1.L, m1.d)
    assert m1.pos_embed.shape == (m1.n + 1, m1.d)
    assert m1.class_token.shape == (m1.d,)
    assert m1.head_w.shape == (m1.d, m1.num_classes)
    for layer in m1.encoder:
        assert layer.wq.shape == (m1.d, m1.d)
        assert layer.mlp_w1.shape == (m1.d, 4 * m1.d)
        assert layer.mlp_w2.shape == (4 * m1.d, m1.d)


def test_init_model_validation():
    with pytest.raises(ValueError):
        init_random_model(0, p=2, c=1, n=4, d=9, depth=1, heads=2,
                          num_classes=2)


def test_head_gradient_matches_finite_differences():
    # central-difference oracle on a 3-sample batch
    s = SplitMix64(50)
    feats = s.normals(3 * 6).reshape(3, 6)
    labels = np.array([0, 2, 1])
    w = s.normals(6 * 3).reshape(6, 3) * 0.3
    b = s.normals(3) * 0.1
    _, gw, gb = head_loss_and_grad(feats, labels, w, b)
    eps = 1e-6

    def loss_at(wv, bv):
        return head_loss_and_grad(feats, labels, wv, bv)[0]

    for idx in np.ndindex(w.shape):
        wp, wm = w.copy(), w.copy()
        wp[idx] += eps
        wm[idx] -= eps
        fd = (loss_at(wp, b) - loss_at(wm, b)) / (2 * eps)
        assert gw[idx] == pytest.approx(fd, rel=1e-5, abs=1e-9)
    for j in range(len(b)):
        bp, bm = b.copy(), b.copy()
        bp[j] += eps
        bm[j] -= eps
        fd = (loss_at(w, bp) - loss_at(w, bm)) / (2 * eps)
        assert gb[j] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_train_head_separable_converges():
    model = small_model(seed=61, p=4, c=1, n=16, classes=2)
    images, labels = make_dataset(62, 60, 2, 16, 16, 1)
    trained, losses = train_linear_head(model, images, labels,
                                        epochs=200, lr=0.1)
    preds = [int(np.argmax(classify(trained, img))) for img in images]
    assert np.mean(np.array(preds) == labels) >= 0.95
    assert losses[-1] < losses[0]


def test_train_head_zero_epochs_noop():
    model = small_model()
    images, labels = make_dataset(1, 6, 3, 16, 16, 1)
    trained, losses = train_linear_head(model, images, labels, 0, 0.1)
    assert np.array_equal(trained.head_w, model.head_w)
    assert losses == []


def test_train_head_single_class_trivial():
    model = small_model(seed=71, classes=2)
    images, _ = make_dataset(72, 10, 2, 16, 16, 1)
    labels = np.zeros(10, dtype=np.int64)
    trained, _ = train_linear_head(model, images, labels, 100, 0.5)
    preds = [int(np.argmax(classify(trained, img))) for img in images]
    assert preds == [0] * 10


def test_train_head_validation():
    model = small_model()
    with pytest.raises(ValueError):
        train_linear_head(model, [], np.array([], dtype=np.int64), 1, 0.1)
    images, _ = make_dataset(1, 2, 2, 16, 16, 1)
    with pytest.raises(ValueError):
        train_linear_head(model, images, np.array([0, 99]), 1, 0.1)


def test_wrong_key_argmax_near_chance():
    # model encrypted with k1, images encrypted with independent k2
    model = small_model(seed=81, p=2, c=1, n=16, d=8, classes=2)
    images, labels = make_dataset(82, 200, 2, 8, 8, 1)
    trained, _ = train_linear_head(model, images, labels, 150, 0.1)
    k1 = generate_key(83, p=2, c=1, n=16)
    enc_model = encrypt_model(trained, k1)
    base = np.array([int(np.argmax(classify(trained, img)))
                     for img in images])
    agree = []
    for t in range(3):
        k2 = generate_key(900 + t, p=2, c=1, n=16)
        preds = np.array([int(np.argmax(classify(enc_model,
                                                 encrypt_image(img, k2))))
                          for img in images])
        agree.append(np.mean(preds == base))
    assert np.median(agree) <= 1 / 2 + 0.15  # 1/num_classes + slack


def test_model_save_load_roundtrip(tmp_path):
    model = small_model(seed=91)
    path = str(tmp_path / "m.vtbm")
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.p == model.p and loaded.depth == model.depth
    assert np.array_equal(loaded.patch_embed, model.patch_embed)
    assert np.array_equal(loaded.encoder[1].mlp_w1, model.encoder[1].mlp_w1)
    img = random_plain_image(5, 16, 16, 1)
    assert np.array_equal(classify(loaded, img), classify(model, img))
