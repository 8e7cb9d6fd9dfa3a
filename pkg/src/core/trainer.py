# src/core/trainer.py
"""
Truncated BPTT 학습 루프.

epoch 마다 시퀀스를 섞어 batch 로 나누고, batch 안에서는 truncation 길이 구간 단위로
  구간 loss -> backward -> batch 평균 gradient -> clipping -> Adam
을 반복한다. 구간 경계에서 belief / 순환 상태 값은 이어가고 gradient 는 끊는다.
"""
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Optional

import numpy as np

from src.core import autodiff as ad
from src.core.autodiff import Tape
from src.core.errors import NonFiniteError, StepError, TrainingAbortedError
from src.core.interfaces import ISequenceModel
from src.core.models import EpochLog, TrainConfig, TrajectoryDataset, TrajectorySequence
from src.core.optim import AdamState, adam_step, clip_gradients
from src.utils.calculator import ErrorCalculator
from src.utils.rng import derive_seed, make_rng


@dataclass
class EvalSummary:
    mean_error: float
    loss: float
    mean_gain: float
    steps: int


class Trainer:
    def __init__(self, config: TrainConfig, logger=None):
        self.config = config
        self.logger = logger

    def _log(self, msg: str):
        if self.logger:
            self.logger.info(msg)

    def train(self, model: ISequenceModel, dataset: TrajectoryDataset) -> List[EpochLog]:
        if len(dataset) == 0:
            raise ValueError("Trainer: empty training dataset")
        cfg = self.config
        shuffle_rng = make_rng(derive_seed(cfg.seed, 101))
        dropout_rng = make_rng(derive_seed(cfg.seed, 102))
        adam = AdamState(lr=cfg.learning_rate)

        self._log(f"[Train] {model.name}: {len(dataset)} sequences, {cfg.epochs} epochs, "
                  f"batch {cfg.batch_size}, truncation {cfg.truncation}")
        history: List[EpochLog] = []
        for epoch in range(1, cfg.epochs + 1):
            adam = replace(adam, lr=cfg.learning_rate_at(epoch))
            order = shuffle_rng.permutation(len(dataset))
            loss_sum, step_count, gains = 0.0, 0, []

            for batch_idx, start in enumerate(range(0, len(order), cfg.batch_size), start=1):
                batch = [dataset.sequences[i] for i in order[start:start + cfg.batch_size]]
                try:
                    adam, batch_loss, batch_steps, batch_gains = self._train_batch(model, batch, adam, dropout_rng)
                except (NonFiniteError, StepError) as e:
                    raise TrainingAbortedError(f"non-finite value during training: {e}", epoch, batch_idx) from e
                if not np.isfinite(batch_loss):
                    raise TrainingAbortedError("non-finite training loss", epoch, batch_idx)
                loss_sum += batch_loss
                step_count += batch_steps
                gains.extend(batch_gains)

            log = EpochLog(
                epoch=epoch,
                loss=loss_sum / max(step_count, 1),
                mean_gain=float(np.mean(gains)) if gains else float("nan"),
                learning_rate=adam.lr,
            )
            history.append(log)
            self._log(f"[Train] epoch {epoch}: loss={log.loss:.6f} mean_gain={log.mean_gain:.4f} lr={log.learning_rate:.3g}")
        return history

    def _train_batch(self, model: ISequenceModel, batch: List[TrajectorySequence], adam: AdamState,
                     rng: np.random.Generator):
        """반환: (adam state, step 가중 loss 합, step 수, step 별 gain)"""
        cfg = self.config
        carries: List[Any] = [model.initial_carry(seq.measurements[0]) for seq in batch]
        longest = max(seq.length for seq in batch)
        loss_sum, steps, gains = 0.0, 0, []

        for seg_start in range(0, longest, cfg.truncation):
            params = model.parameters()
            grad_sum: Optional[Dict[str, np.ndarray]] = None
            active = 0
            for k, seq in enumerate(batch):
                if seg_start >= seq.length:
                    continue
                seg = slice(seg_start, min(seg_start + cfg.truncation, seq.length))
                tape = Tape()
                bound = ad.bind(tape, params)
                result = model.segment_loss(tape, bound, seq.truth[seg], seq.measurements[seg], carries[k],
                                            training=True, rng=rng)
                value = float(result.loss.value[0, 0])
                if not np.isfinite(value):
                    raise NonFiniteError("segment loss is not finite", index=0)
                grads = ad.collect_grads(tape.backward(result.loss), bound)
                grad_sum = grads if grad_sum is None else {n: grad_sum[n] + g for n, g in grads.items()}

                n_steps = seg.stop - seg.start
                loss_sum += value * n_steps
                steps += n_steps
                gains.extend(result.gains)
                carries[k] = result.carry
                active += 1

            # batch 평균
            grads = {n: g / active for n, g in grad_sum.items()}
            if cfg.clip_norm is not None:
                grads, norm = clip_gradients(grads, cfg.clip_norm)
                if self.logger:
                    self.logger.debug(f"[Train] segment {seg_start // cfg.truncation + 1}: grad norm {norm:.4g}")
            # truncation 구간마다 Adam 한 번 (truncation >= T 이면 batch 당 한 번)
            new_params, adam = adam_step(params, grads, adam)
            model.load_parameters(new_params)
        return adam, loss_sum, steps, gains

    def evaluate(self, model: ISequenceModel, dataset: TrajectoryDataset) -> EvalSummary:
        """dropout 없이 전체 시퀀스를 필터링한 평균 유클리드 오차 + 구간 loss / gain 평균"""
        if len(dataset) == 0:
            raise ValueError("Trainer: empty evaluation dataset")
        loss_sum, steps, gains = 0.0, 0, []
        params = model.parameters()
        for seq in dataset.sequences:
            carry = model.initial_carry(seq.measurements[0])
            for seg_start in range(0, seq.length, self.config.truncation):
                seg = slice(seg_start, min(seg_start + self.config.truncation, seq.length))
                tape = Tape()
                result = model.segment_loss(tape, ad.bind(tape, params), seq.truth[seg], seq.measurements[seg],
                                            carry, training=False, rng=None)
                n_steps = seg.stop - seg.start
                loss_sum += float(result.loss.value[0, 0]) * n_steps
                steps += n_steps
                gains.extend(result.gains)
                carry = result.carry
        mean_error = ErrorCalculator().mean_error(
            [seq.truth for seq in dataset.sequences], [model.run(seq.measurements) for seq in dataset.sequences])
        return EvalSummary(
            mean_error=mean_error,
            loss=loss_sum / max(steps, 1),
            mean_gain=float(np.mean(gains)) if gains else float("nan"),
            steps=steps,
        )
