from sqlalchemy import create_engine
from sqlalchemy.orm import declarative_base, sessionmaker

from pbdplan.config import get_settings

# Database connection string
# Format: sqlite:///./pbdplan.db or postgresql://user@localhost/pbdplan
SQLALCHEMY_DATABASE_URL = get_settings().database_url


def make_engine(url: str):
    """
    Create an engine for url
    SQLite connections are shared with the threads FastAPI runs requests on
    """
    connect_args = {"check_same_thread": False} if url.startswith("sqlite") else {}
    return create_engine(url, connect_args=connect_args)


# Create database engine - manages connections
engine = make_engine(SQLALCHEMY_DATABASE_URL)

# Create session factory - opens/closes database connections
SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)

# Base class for all models
Base = declarative_base()

# Dependency function - provides database session to endpoints
def get_db():
    db = SessionLocal()
    try:
        yield db  # Provide session to endpoint
    finally:
        db.close()  # Always close connection when done
