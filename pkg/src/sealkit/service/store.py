"""In-memory session store.

Sessions advance through fixed stages: uploaded -> clustered -> segmented.
Artifacts computed at each stage never change afterwards; the store only
evicts whole sessions, least recently used first.
"""

from __future__ import annotations

import threading
import uuid
from collections import OrderedDict
from dataclasses import dataclass, field

from ..color_separation import SeparationResult
from ..pipeline import SealAnalysis
from ..raster import RasterImage
from ..segmentation import SegmentHypothesis

DEFAULT_CAPACITY = 64


@dataclass
class Session:
    session_id: str
    image: RasterImage
    # one lock per session: pipeline stages run serially within a session
    # while distinct sessions proceed in parallel
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    k: int | None = None
    separation: SeparationResult | None = None
    cluster_masks: list[bytes] = field(default_factory=list)
    cluster_index: int | None = None
    analysis: SealAnalysis | None = None
    segments: list[SegmentHypothesis] = field(default_factory=list)
    segment_masks: list[bytes] = field(default_factory=list)
    overlay: bytes | None = None
    query_cache: dict[tuple, dict] = field(default_factory=dict)

    @property
    def clustered(self) -> bool:
        return self.separation is not None

    @property
    def segmented(self) -> bool:
        return self.analysis is not None


class SessionStore:
    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self._capacity = capacity
        self._lock = threading.Lock()
        self._sessions: OrderedDict[str, Session] = OrderedDict()

    def __len__(self) -> int:
        with self._lock:
            return len(self._sessions)

    def create(self, image: RasterImage) -> Session:
        session = Session(session_id=uuid.uuid4().hex, image=image)
        with self._lock:
            self._sessions[session.session_id] = session
            while len(self._sessions) > self._capacity:
                self._sessions.popitem(last=False)
        return session

    def get(self, session_id: str) -> Session | None:
        with self._lock:
            session = self._sessions.get(session_id)
            if session is not None:
                self._sessions.move_to_end(session_id)
            return session
