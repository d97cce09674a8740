"""
InteRACT 意圖預測系統 - 自我驗證套件
梯度檢查、DCT 往返、平移等變性、變體契約與 retarget 剛性檢查；
每項檢查回傳一個結果字典，供 verify 子命令彙整
"""
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from .dataset_io import PairedPoseDataset, WindowBatch
from .diff_core import (
    DecoderLayer, EncoderLayer, MultiHeadAttention, ParameterStore, Tensor, grad_check, layer_norm,
    linear, softmax,
)
from .model import InteractModel, ModelConfig, predict_intent
from .pose_core import (
    Pose, PoseTrajectory, SceneWindow, dct_apply, human_layout, idct_apply, layout_for_width, translate_window,
)
from .retarget import EEPose, MarkerLayout, ee_to_marker_pose, minimal_rotation
from .training import loss_align, loss_total, prediction_loss

GRAD_TOLERANCE = 1e-4
DCT_TOLERANCE = 1e-9
EQUIVARIANCE_TOLERANCE = 1e-6
RIGIDITY_TOLERANCE = 1e-9


def _result(name: str, max_error: float, tolerance: float, detail: str = '') -> Dict[str, Any]:
    return {
        'name': name,
        'success': bool(max_error <= tolerance),
        'max_error': float(max_error),
        'tolerance': tolerance,
        'detail': detail,
        'error': None,
    }


def _leaf(rng: np.random.Generator, *shape) -> Tensor:
    return Tensor(rng.normal(size=shape), requires_grad=True)


def check_op_gradients(seed: int = 0) -> List[Dict[str, Any]]:
    rng = np.random.default_rng(seed)
    results = []

    x, W, b = _leaf(rng, 3, 4), _leaf(rng, 4, 5), _leaf(rng, 5)
    report = grad_check(lambda: linear(x, W, b), [x, W, b], op_name='linear')
    results.append(_result('grad:linear', report.max_rel_error, GRAD_TOLERANCE))

    s, g = _leaf(rng, 3, 6), rng.normal(size=(3, 6))
    report = grad_check(lambda: softmax(s) * g, [s], op_name='softmax')
    results.append(_result('grad:softmax', report.max_rel_error, GRAD_TOLERANCE))

    h, gain, bias = _leaf(rng, 4, 8), _leaf(rng, 8), _leaf(rng, 8)
    w = rng.normal(size=(4, 8))
    report = grad_check(lambda: layer_norm(h, gain, bias) * w, [h, gain, bias], op_name='layer_norm')
    results.append(_result('grad:layer_norm', report.max_rel_error, GRAD_TOLERANCE))

    store = ParameterStore(np.float64)
    mha = MultiHeadAttention(store, 'mha', 8, 2, rng)
    q, kv = _leaf(rng, 3, 8), _leaf(rng, 5, 8)
    weights = rng.normal(size=(3, 8))
    params = [t for _, t in store.items()]
    report = grad_check(lambda: mha(q, kv) * weights, [q, kv] + params, op_name='multi_head_attention')
    results.append(_result('grad:multi_head_attention', report.max_rel_error, GRAD_TOLERANCE))

    store = ParameterStore(np.float64)
    enc = EncoderLayer(store, 'enc', 8, 2, 4, rng)
    xe = _leaf(rng, 4, 8)
    proj = rng.normal(size=(4, 8))
    params = [t for _, t in store.items()]
    report = grad_check(lambda: enc(xe) * proj, [xe] + params, op_name='encoder_layer', max_coords=24, seed=seed)
    results.append(_result('grad:encoder_layer', report.max_rel_error, GRAD_TOLERANCE))

    store = ParameterStore(np.float64)
    dec = DecoderLayer(store, 'dec', 8, 2, 4, rng)
    query, memory = _leaf(rng, 1, 8), _leaf(rng, 6, 8)
    proj = rng.normal(size=(1, 8))
    params = [t for _, t in store.items()]
    report = grad_check(lambda: dec(query, memory) * proj, [query, memory] + params,
                        op_name='decoder_layer', max_coords=24, seed=seed)
    results.append(_result('grad:decoder_layer', report.max_rel_error, GRAD_TOLERANCE))
    return results


def tiny_config(seed: int = 0, layers: int = 1) -> ModelConfig:
    return ModelConfig(horizon=4, embed_dim=8, layers=layers, heads=2, ffn_ratio=4, seed=seed, precision='float64')


def random_batch(rng: np.random.Generator, size: int, horizon: int, partner_kind: str = 'robot',
                 scale: float = 0.3) -> WindowBatch:
    width = 27 if partner_kind == 'human' else 6
    human = rng.normal(scale=scale, size=(size, horizon, 27))
    return WindowBatch(
        human_history=human,
        partner_history=rng.normal(scale=scale, size=(size, horizon, width)),
        partner_action=rng.normal(scale=scale, size=(size, width)),
        last_human=human[:, -1].copy(),
        offsets=np.zeros((size, 3)),
        partner_kind=partner_kind,
        target=rng.normal(scale=scale, size=(size, horizon, 27)),
    )


def check_model_gradient(seed: int = 0, max_coords: Optional[int] = 8, layers: int = 2) -> Dict[str, Any]:
    """tiny 設定 (D=8, T=4) 上整個前向加上總損失的梯度檢查；兩層以上才涵蓋層間殘差路徑"""
    rng = np.random.default_rng(seed)
    model = InteractModel(tiny_config(seed, layers))
    batch = random_batch(rng, 2, 4)
    pairs = PairedPoseDataset(rng.normal(scale=0.3, size=(3, 6)), rng.normal(scale=0.3, size=(3, 27)))

    def total() -> Tensor:
        pred = prediction_loss(model.forward_batch(batch), batch.target)
        return loss_total(pred, loss_align(model, pairs, 'hist'), loss_align(model, pairs, 'fut'))

    params = [t for _, t in model.parameters()]
    report = grad_check(total, params, op_name='interact_total_loss', max_coords=max_coords, seed=seed)
    name = model.store.names()[report.worst_index[0]]
    return _result('grad:interact_total_loss', report.max_rel_error, GRAD_TOLERANCE,
                   f"{report.checked} coordinates, worst at {name}{list(report.worst_index[1])}")


def check_dct_roundtrip(seed: int = 0, n_channels: int = 1000, length: int = 15) -> Dict[str, Any]:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(length, n_channels))
    coeffs = dct_apply(x)
    roundtrip = float(np.abs(idct_apply(coeffs) - x).max())
    norms = float(np.abs(np.linalg.norm(coeffs, axis=0) - np.linalg.norm(x, axis=0)).max())
    return _result('dct:roundtrip', max(roundtrip, norms), DCT_TOLERANCE,
                   f"roundtrip {roundtrip:.2e}, norm preservation {norms:.2e}")


def random_window(rng: np.random.Generator, partner_kind: str = 'robot', horizon: int = 15,
                  spread: float = 2.0) -> SceneWindow:
    width = 27 if partner_kind == 'human' else 6
    base = rng.uniform(-spread, spread, size=3)
    human = rng.normal(scale=0.3, size=(horizon, 27)).reshape(horizon, -1, 3) + base
    partner = rng.normal(scale=0.3, size=(horizon, width)).reshape(horizon, -1, 3) + base
    layout = layout_for_width(width)
    return SceneWindow(
        human_history=PoseTrajectory(human_layout(), human.reshape(horizon, -1)),
        partner_history=PoseTrajectory(layout, partner.reshape(horizon, -1)),
        partner_future_action=Pose(layout, (rng.normal(scale=0.3, size=(width // 3, 3)) + base).reshape(-1)),
    )


def check_translation_equivariance(model: InteractModel, n_windows: int = 100, seed: int = 0) -> Dict[str, Any]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_windows):
        window = random_window(rng, 'robot', model.config.horizon)
        v = rng.uniform(-5.0, 5.0, size=3)
        moved = predict_intent(model, translate_window(window, v)).joints()
        expected = predict_intent(model, window).joints() + v
        worst = max(worst, float(np.abs(moved - expected).max()))
    return _result('equivariance:translation', worst, EQUIVARIANCE_TOLERANCE, f"{n_windows} windows")


def _perturb(window: SceneWindow, rng: np.random.Generator, history: bool, action: bool) -> SceneWindow:
    partner = window.partner_history
    future = window.partner_future_action
    if history:
        partner = PoseTrajectory(partner.layout, partner.frames + rng.normal(size=partner.frames.shape), partner.frame_hz)
    if action:
        future = Pose(future.layout, future.coords + rng.normal(size=future.coords.shape))
    return SceneWindow(window.human_history, partner, future, window.target_future)


def check_variant_contracts(config: ModelConfig, n_windows: int = 100, seed: int = 0) -> Dict[str, Any]:
    """Marginal 不受夥伴歷史與未來影響；MarginalHist 不受夥伴未來影響 (逐位元)"""
    rng = np.random.default_rng(seed)
    marginal = InteractModel(ModelConfig(**{**config.to_dict(), 'variant': 'Marginal'}))
    marginal_hist = InteractModel(ModelConfig(**{**config.to_dict(), 'variant': 'MarginalHist'}))
    violations = 0
    for _ in range(n_windows):
        window = random_window(rng, 'robot', config.horizon)
        base = predict_intent(marginal, window).frames
        if not np.array_equal(base, predict_intent(marginal, _perturb(window, rng, True, True)).frames):
            violations += 1
        base = predict_intent(marginal_hist, window).frames
        if not np.array_equal(base, predict_intent(marginal_hist, _perturb(window, rng, False, True)).frames):
            violations += 1
    return _result('variants:invariance', float(violations), 0.0, f"{violations} violations over {n_windows} windows")


def check_retarget(seed: int = 0, n_poses: int = 100) -> Dict[str, Any]:
    rng = np.random.default_rng(seed)
    layout = MarkerLayout()
    worst = 0.0
    for _ in range(n_poses):
        q = minimal_rotation(rng.normal(size=3))
        worst = max(worst, abs(float(np.linalg.norm(q)) - 1.0))
        markers = ee_to_marker_pose(EEPose(rng.normal(size=3), q), layout).joints()
        worst = max(worst, abs(float(np.linalg.norm(markers[0] - markers[1])) - layout.marker_distance))
    return _result('retarget:rigidity', worst, RIGIDITY_TOLERANCE, f"{n_poses} poses")


class VerificationSuite:
    """依序執行所有自我檢查"""

    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0, n_windows: int = 100):
        self.config = config
        self.seed = seed
        self.n_windows = n_windows

    def run(self, log: Optional[Callable[[Dict[str, Any]], None]] = None) -> List[Dict[str, Any]]:
        checks = [
            lambda: check_op_gradients(self.seed),
            lambda: [check_model_gradient(self.seed)],
            lambda: [check_dct_roundtrip(self.seed)],
            lambda: [check_translation_equivariance(InteractModel(self.config), self.n_windows, self.seed)],
            lambda: [check_variant_contracts(self.config, self.n_windows, self.seed)],
            lambda: [check_retarget(self.seed)],
        ]
        results = []
        for check in checks:
            for result in check():
                results.append(result)
                if log is not None:
                    log(result)
        return results

    @staticmethod
    def get_verification_summary(results: List[Dict[str, Any]]) -> Dict[str, Any]:
        grads = [r['max_error'] for r in results if r['name'].startswith('grad:')]
        failed = [r['name'] for r in results if not r['success']]
        return {
            'total_checks': len(results),
            'passed': len(results) - len(failed),
            'failed': failed,
            'max_grad_error': max(grads) if grads else 0.0,
            'all_passed': not failed,
        }
