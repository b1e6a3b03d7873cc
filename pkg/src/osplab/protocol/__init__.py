"""OSP and baseline protocol state machines, messages and shared helpers."""
from .actions import Ready, Send, Settled, Timer
from .baselines import AspServer, BspServer, FullSyncWorker, R2spServer, make_baseline, r2sp_round_order, r2sp_slot
from .core import (ServerState, WorkerState, aggregate, chunk_count, first_iteration_bootstrap, lgp_correct,
                   lgp_partial, osp_worker_iteration, plan_ics_chunks)
from .messages import PS, Message, MessageKind, decode_message, encode_message, gradient_message
from .osp import IcsBudget, OspServer, OspWorker, osp_server_on_push
