import json
from datetime import datetime, timezone

from ..database import db


class SegmentationRun(db.Model):
    __tablename__ = 'segmentation_runs'

    PENDING = 'PENDING'
    RUNNING = 'RUNNING'
    COMPLETE = 'COMPLETE'
    NA = 'NA'
    FAILED = 'FAILED'
    STATUSES = (PENDING, RUNNING, COMPLETE, NA, FAILED)

    id = db.Column(db.Integer, primary_key=True)
    label = db.Column(db.String(120))
    status = db.Column(db.String(16), nullable=False, default=PENDING)
    extension = db.Column(db.String(32), nullable=False)
    seed = db.Column(db.Integer, nullable=False, default=0)
    config_json = db.Column(db.Text, nullable=False)
    output_dir = db.Column(db.String(512))
    n_observations = db.Column(db.Integer)
    n_changepoints = db.Column(db.Integer)
    log_score = db.Column(db.Float)
    manifest_json = db.Column(db.Text)
    error = db.Column(db.Text)
    created_at = db.Column(db.DateTime, default=lambda: datetime.now(timezone.utc))
    finished_at = db.Column(db.DateTime)

    __table_args__ = (
        db.Index('idx_segmentation_runs_status', 'status'),
        db.Index('idx_segmentation_runs_created_at', 'created_at'),
    )

    @property
    def config(self):
        return json.loads(self.config_json) if self.config_json else None

    @property
    def manifest(self):
        return json.loads(self.manifest_json) if self.manifest_json else None

    def mark(self, status, error=None):
        if status not in self.STATUSES:
            raise ValueError(f"Unknown run status '{status}'")
        self.status = status
        self.error = error
        if status in (self.COMPLETE, self.NA, self.FAILED):
            self.finished_at = datetime.now(timezone.utc)

    def to_dict(self):
        return {
            "id": self.id,
            "label": self.label,
            "status": self.status,
            "extension": self.extension,
            "seed": self.seed,
            "config": self.config,
            "output_dir": self.output_dir,
            "n_observations": self.n_observations,
            "n_changepoints": self.n_changepoints,
            "log_score": self.log_score,
            "manifest": self.manifest,
            "error": self.error,
            "created_at": self.created_at.isoformat() + 'Z' if self.created_at else None,
            "finished_at": self.finished_at.isoformat() + 'Z' if self.finished_at else None
        }
