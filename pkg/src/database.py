import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Generator

from sqlalchemy import create_engine, inspect
from sqlalchemy.engine import Engine
from sqlalchemy.orm import DeclarativeBase, Session, sessionmaker

from .config import ARCHIVE_DB_NAME, DATABASE_URL_OVERRIDE

logger = logging.getLogger(__name__)


class Base(DeclarativeBase):
    pass


class Database:
    """Archive database manager (one engine and sessionmaker per URL, cached in class variables)"""

    _engines: dict[str, Engine] = {}
    _session_locals: dict[str, sessionmaker[Session]] = {}

    @staticmethod
    def url_for(root: Path) -> str:
        """
        SQLite URL of the archive stored under an experiment root.

        FEDPROBE_DATABASE_URL, when set, replaces the per-archive file.
        """
        if DATABASE_URL_OVERRIDE:
            return DATABASE_URL_OVERRIDE
        return f"sqlite:///{(Path(root) / ARCHIVE_DB_NAME).resolve()}"

    @classmethod
    def _create_engine(cls, url: str) -> Engine:
        logger.info(f"Opening archive database {url}")
        engine = create_engine(url, echo=False)

        # Import models to register them with Base.metadata
        from . import models  # noqa: F401

        Base.metadata.create_all(bind=engine)
        tables = inspect(engine).get_table_names()
        logger.debug(f"Archive tables: {', '.join(tables)}")
        return engine

    @classmethod
    def get_engine(cls, url: str) -> Engine:
        """Create the engine on first use of a URL, reuse it afterwards."""
        if url not in cls._engines:
            cls._engines[url] = cls._create_engine(url)
        return cls._engines[url]

    @classmethod
    def get_session_local(cls, url: str) -> sessionmaker[Session]:
        if url not in cls._session_locals:
            cls._session_locals[url] = sessionmaker(bind=cls.get_engine(url), expire_on_commit=False)
        return cls._session_locals[url]

    @classmethod
    @contextmanager
    def session(cls, root: Path) -> Generator[Session, None, None]:
        """Session on the archive under `root`; commits on success, rolls back on error."""
        db = cls.get_session_local(cls.url_for(root))()
        try:
            yield db
            db.commit()
        except Exception:
            db.rollback()
            raise
        finally:
            db.close()

    @classmethod
    def dispose(cls) -> None:
        """Close every cached engine (tests use fresh temporary archives)."""
        for engine in cls._engines.values():
            engine.dispose()
        cls._engines.clear()
        cls._session_locals.clear()
