"""Test applications: KV server, batch job, verifying clients, lockset audit."""
from .batch import BatchConfig, BatchJob, chunk_value, golden_digest
from .client import BatchClient, ClientConfig, KvClientThread, VerifyResult, verify_batch, verify_run
from .kv import KvConfig, KvServer, kv_handle
from .lockset import LocksetAuditor

__all__ = ["BatchConfig", "BatchJob", "chunk_value", "golden_digest", "BatchClient", "ClientConfig",
           "KvClientThread", "VerifyResult", "verify_batch", "verify_run", "KvConfig", "KvServer",
           "kv_handle", "LocksetAuditor"]
