import json
import logging
from datetime import datetime, timezone

from sqlalchemy import Boolean, DateTime, Float, ForeignKey, Integer, String, Text, create_engine
from sqlalchemy.exc import SQLAlchemyError
from sqlalchemy.orm import DeclarativeBase, Mapped, Session, mapped_column, relationship

from utils.error_handlers import json_safe

logger = logging.getLogger(__name__)


class Base(DeclarativeBase):
    pass


def _utcnow():
    return datetime.now(timezone.utc)


class RunRecord(Base):
    __tablename__ = 'runs'

    id: Mapped[int] = mapped_column(Integer, primary_key=True)
    command: Mapped[str] = mapped_column(String(50), nullable=False)
    config_hash: Mapped[str] = mapped_column(String(32), nullable=False)
    seed: Mapped[int | None] = mapped_column(Integer)
    passed: Mapped[bool] = mapped_column(Boolean, default=False)
    exit_status: Mapped[int] = mapped_column(Integer, default=0)
    report_json: Mapped[str] = mapped_column(Text)
    processing_time: Mapped[float | None] = mapped_column(Float)
    created_at: Mapped[datetime] = mapped_column(DateTime, default=_utcnow)

    # Relationships
    checks: Mapped[list['CheckRecord']] = relationship(back_populates='run', cascade='all, delete-orphan')


class CheckRecord(Base):
    __tablename__ = 'checks'

    id: Mapped[int] = mapped_column(Integer, primary_key=True)
    name: Mapped[str] = mapped_column(String(100), nullable=False)
    passed: Mapped[bool] = mapped_column(Boolean, default=False)
    detail: Mapped[str | None] = mapped_column(Text)
    run_id: Mapped[int] = mapped_column(ForeignKey('runs.id'), nullable=False)

    run: Mapped[RunRecord] = relationship(back_populates='checks')


def safe_commit(session: Session) -> bool:
    try:
        session.commit()
        return True
    except SQLAlchemyError as e:
        session.rollback()
        logger.error(f"Ledger commit failed, rolled back: {e}")
        return False


def _sub_checks(report):
    """Top-level entries of a report that are themselves pass/fail reports"""
    for name, value in sorted(report.items()):
        if isinstance(value, dict) and 'pass' in value:
            yield name, value


def record_run(url, command, config_hash, report, exit_status, seed=None, processing_time=None):
    """Persist a report and its sub-checks; returns the run id or None when the commit fails"""
    engine = create_engine(url)
    Base.metadata.create_all(engine)
    with Session(engine) as session:
        run = RunRecord(command=command, config_hash=config_hash, seed=seed,
                        passed=bool(report.get('pass')), exit_status=exit_status,
                        report_json=json.dumps(json_safe(report), sort_keys=True),
                        processing_time=processing_time)
        for name, sub in _sub_checks(report):
            run.checks.append(CheckRecord(name=name, passed=bool(sub['pass']),
                                          detail=json.dumps(json_safe(sub), sort_keys=True)))
        session.add(run)
        if not safe_commit(session):
            return None
        logger.info(f"Recorded run {run.id} ({command}) in ledger")
        return run.id
