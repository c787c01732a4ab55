from celery import Celery

from config.settings import celery_broker_url, celery_eager, celery_result_backend, load_environment

load_environment()

celery_app = Celery(
    'wavegenre',
    broker=celery_broker_url(),
    backend=celery_result_backend(),
    include=['tasks.pipeline_tasks']
)

celery_app.conf.update(
    task_serializer='json',
    result_serializer='json',
    accept_content=['json'],
    timezone='UTC',
    enable_utc=True,
    # In-process execution unless a worker pool is configured
    task_always_eager=celery_eager(),
    task_eager_propagates=True,
)
