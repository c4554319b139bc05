from .expert import Expert, d_trigger, obstacle_ahead, scripted_expert
from .teacher import (
    TEACHER_IN,
    BCConfig,
    DivergenceError,
    TeacherNet,
    collect_privileged,
    teacher_features,
    teacher_loss,
    train_teacher_bc,
)
from .ppo import PPOAgent, PPOConfig, ValueNet, compute_gae, gaussian_logp, surrogate, train_teacher_ppo
from .student import (
    DepthSensor,
    DistillConfig,
    Episode,
    EventSensor,
    RolloutBuffer,
    StudentNet,
    action_loss,
    collect_episodes,
    distill_loss,
    distill_onpolicy,
    distill_warmup,
    make_sensor,
    masked_mse,
    probe_loss,
    sequence_loss,
    student_proprio,
    train_on_buffer,
    yaw_loss,
)
from .evaluate import ExpertPolicy, StudentPolicy, TeacherPolicy, evaluate, format_table, run_batch, success_rate
