"""Primary/backup replication of multithreaded services with record/replay of the last epoch."""
from .harness import CampaignConfig, ExperimentReport, run_campaign, run_one, wilson_interval
from .replication import Cluster, ClusterConfig
from .rr_runtime import Mitigation, rr_lock, rr_syscall

__version__ = "0.1.0"
__all__ = ["CampaignConfig", "ExperimentReport", "run_campaign", "run_one", "wilson_interval", "Cluster",
           "ClusterConfig", "Mitigation", "rr_lock", "rr_syscall"]
