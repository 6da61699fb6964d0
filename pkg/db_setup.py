"""
运行记录数据库

每次命令执行写一条 RunRecord。引擎在第一次使用时创建，
导入本模块不会触碰数据库文件。
"""
from datetime import datetime
from typing import List, Optional

from sqlalchemy import Boolean, Column, DateTime, Float, Integer, String, Text, create_engine
from sqlalchemy.orm import declarative_base, sessionmaker

from config import LEDGER_URL

Base = declarative_base()

_session_factories = {}


class RunRecord(Base):
    """命令执行记录表"""
    __tablename__ = "run_records"

    id = Column(Integer, primary_key=True)
    command = Column(String(50), index=True)
    seed = Column(Integer)

    parameters = Column(Text)  # JSON
    success = Column(Boolean, default=True)
    error_message = Column(Text)
    outputs = Column(Text)  # JSON 格式的输出文件列表

    execution_time = Column(Float, default=0.0)  # 秒
    executed_at = Column(DateTime, default=datetime.now, index=True)


def get_session_factory(url: Optional[str] = None) -> sessionmaker:
    """按 URL 缓存 Session 工厂，首次调用时建表"""
    url = url or LEDGER_URL
    if url not in _session_factories:
        engine = create_engine(
            url,
            connect_args={'check_same_thread': False} if url.startswith('sqlite') else {}
        )
        Base.metadata.create_all(engine)
        # expire_on_commit=False: 提交后对象不过期
        _session_factories[url] = sessionmaker(
            autocommit=False, autoflush=False, bind=engine, expire_on_commit=False
        )
    return _session_factories[url]


class RunLedger:
    """运行记录的读写"""

    def __init__(self, url: Optional[str] = None):
        self.url = url or LEDGER_URL

    def record(
        self,
        command: str,
        seed: Optional[int],
        parameters: str,
        success: bool,
        error_message: Optional[str],
        outputs: str,
        execution_time: float
    ) -> None:
        session = get_session_factory(self.url)()
        try:
            session.add(RunRecord(
                command=command,
                seed=seed,
                parameters=parameters,
                success=success,
                error_message=error_message,
                outputs=outputs,
                execution_time=execution_time,
                executed_at=datetime.now(),
            ))
            session.commit()
        finally:
            session.close()

    def recent(self, limit: int = 20) -> List[RunRecord]:
        session = get_session_factory(self.url)()
        try:
            return (
                session.query(RunRecord)
                .order_by(RunRecord.executed_at.desc())
                .limit(limit)
                .all()
            )
        finally:
            session.close()
